import sys

from mrlstd.cli import main

sys.exit(main())
