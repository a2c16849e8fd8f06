"""Non-autonomous neural ODEs with time-varying weights.

Submodules:
    linalg       dense kernels: matvec, matrix exponential, spectral norm
    timebasis    scalar weight trajectories phi(t; alpha) and their gradients
    ortho        Householder chains, Givens walks, geodesics, wrapped fields
    dynamics     right-hand sides f(x, t, theta) with analytic Jacobians
    odeint       fixed-step Euler / RK4 integrators
    grad         discrete backprop, continuous adjoint, finite differences
    sensitivity  S(t), state transition matrices, stability reports
    model        stem -> flow -> head models with losses and penalties
    train        optimizers, synthetic tasks, the training loop
    config       run configuration schema, validation, checkpoints
    cli          command-line entry points (train, gradcheck, ...)
"""

__version__ = "0.1.0"
