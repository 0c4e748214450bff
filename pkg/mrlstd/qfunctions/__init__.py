from mrlstd.qfunctions.qfunction import QFunction
from mrlstd.qfunctions.kernelized import KernelQFunction
from mrlstd.qfunctions.linear import LinearQFunction
