"""Deep regression onto Lie groups and Grassmannians through extrinsic embeddings.

Submodules: ``matlin`` (Jacobi SVD and symmetric eigensolver), ``liegroups``
(SO(3)/SE(3) maps and rotation representations), ``grassmann`` (subspaces),
``net`` (a small numpy regressor with analytic gradients), ``tasks``
(synthetic experiments), ``props`` (numerical property checks) and ``cli``.
"""

__version__ = "0.1.0"
