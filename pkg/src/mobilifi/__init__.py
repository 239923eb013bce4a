"""Mobile LiFi channel toolkit.

Submodules: :mod:`geometry` (device orientation and pose traces),
:mod:`channel` (optical gains), :mod:`coherence`, :mod:`rate` (PAM
achievable rates), :mod:`estimation` (pilot design and LS/ZF estimators),
:mod:`neural` (residual denoiser and LSTM tracker), :mod:`io` and
:mod:`cli`.
"""

__version__ = "0.1.0"
