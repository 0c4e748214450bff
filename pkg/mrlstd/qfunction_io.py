"""
HDF5 persistence for QFunctions. A file holds format/version metadata, the
weights and either the kernel support with its KernelSpec or the basis
descriptor of a linear architecture.
"""

import os.path as op
import json

import h5py
import numpy as np

QF_FORMAT = 'MRLSTD-Q'
QF_VERSION = '0.1.0'
QF_EXT = '.h5'


class QFunctionIOError(Exception):
    pass


def save_qfunction(q, path):
    """
    Save a KernelQFunction or LinearQFunction in HDF5 format. The extension
    .h5 is appended if missing.
    """

    from mrlstd.qfunctions import KernelQFunction, LinearQFunction

    if op.splitext(path)[1] != QF_EXT:
        path += QF_EXT

    with h5py.File(path, 'w') as f:
        f.attrs['NumActions'] = q.num_actions
        if isinstance(q, KernelQFunction):
            f.attrs['Type'] = 'kernel'
            f.create_dataset('Weights', data=q.alpha)
            write_support(f.create_group('/Support'), q.support)
            write_kernel_spec(f.create_group('/Kernel'), q.spec)
        elif isinstance(q, LinearQFunction):
            f.attrs['Type'] = 'linear'
            f.create_dataset('Weights', data=q.w)
            write_basis(f.create_group('/Basis'), q.basis)
        else:
            raise QFunctionIOError("Unrecognised Q-function type")
        write_metadata(f, q.diagnostics)

    return path


def load_qfunction(path):
    """Load a QFunction written by save_qfunction()"""

    from mrlstd.qfunctions import KernelQFunction, LinearQFunction

    if not check_is_qfunction(path):
        raise QFunctionIOError("{} is not a Q-function file".format(path))

    with h5py.File(path, 'r') as f:
        diagnostics = read_metadata(f)
        q_type = f.attrs['Type']
        num_actions = int(f.attrs['NumActions'])
        weights = np.asarray(f['Weights'])

        if q_type == 'kernel':
            support = read_support(f['/Support'])
            spec = read_kernel_spec(f['/Kernel'])
            q = KernelQFunction(weights, support, spec, num_actions)
        elif q_type == 'linear':
            basis = read_basis(f['/Basis'])
            q = LinearQFunction(weights, basis, num_actions)
        else:
            raise QFunctionIOError("Unrecognised Q-function type '{}'"
                                   .format(q_type))

    q.diagnostics = diagnostics
    return q


def write_metadata(group, diagnostics=None):
    group.attrs['Format'] = QF_FORMAT
    group.attrs['Version'] = QF_VERSION
    group.attrs['Metadata'] = json.dumps(diagnostics or {}, default=float)


def read_metadata(group):
    fmt = group.attrs.get('Format')
    version = group.attrs.get('Version')
    if fmt != QF_FORMAT or version is None:
        raise QFunctionIOError("Missing or unknown format metadata")
    if version.split('.')[0] != QF_VERSION.split('.')[0]:
        raise QFunctionIOError("Unsupported version {}".format(version))
    return json.loads(group.attrs.get('Metadata', '{}'))


def write_support(group, support):
    group.attrs['Type'] = 'state_actions'
    group.create_dataset('States', data=support.states)
    group.create_dataset('Actions', data=support.actions)


def read_support(group):
    from mrlstd.kernel import StateActions

    if group.attrs.get('Type') != 'state_actions':
        raise QFunctionIOError("Group does not represent state-action points")
    states = np.asarray(group['States'])
    actions = np.asarray(group['Actions'])
    if states.shape[0] != actions.size:
        raise QFunctionIOError("Support states and actions differ in length")
    return StateActions(states, actions)


def write_kernel_spec(group, spec):
    group.attrs['Type'] = 'gaussian_delta'
    group.attrs['Sigma'] = spec.sigma
    if spec.scaler is not None:
        group.create_dataset('ScalerMean', data=spec.scaler.mean)
        group.create_dataset('ScalerStd', data=spec.scaler.std)


def read_kernel_spec(group):
    from mrlstd.kernel import KernelSpec, StateScaler

    if group.attrs.get('Type') != 'gaussian_delta':
        raise QFunctionIOError("Group does not represent a kernel")
    scaler = None
    if 'ScalerMean' in group:
        scaler = StateScaler(np.asarray(group['ScalerMean']),
                             np.asarray(group['ScalerStd']))
    return KernelSpec(float(group.attrs['Sigma']), scaler)


def write_basis(group, basis):
    group.attrs['Type'] = basis.kind
    for key, value in basis.describe().items():
        if np.ndim(value):
            group.create_dataset(key, data=value)
        else:
            group.attrs[key] = value


def read_basis(group):
    from mrlstd.basis import basis_from_description

    desc = dict(group.attrs)
    kind = desc.pop('Type', None)
    for key in group:
        desc[key] = np.asarray(group[key])
    try:
        return basis_from_description(kind, desc)
    except (KeyError, ValueError) as e:
        raise QFunctionIOError("Cannot rebuild basis: {}".format(e))


def check_is_qfunction(path):
    if not op.isfile(path):
        return False
    try:
        with h5py.File(path, 'r') as f:
            return f.attrs.get('Format') == QF_FORMAT
    except OSError:
        return False
