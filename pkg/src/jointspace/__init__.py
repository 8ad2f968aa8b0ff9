"""Graph-geometry toolkit: localized hyperbolicity profiles of weighted graphs
and a joint Euclidean/hyperbolic graph neural network whose per-node space
selection is aligned to the geometric profile."""

from .graphs import (
    DistanceMatrix,
    EdgeSplitSpec,
    SplitSpec,
    WeightedGraph,
    generate_combined,
    generate_lattice,
    generate_tree,
    k_hop_subgraph,
    load_edge_list,
    reference_combined_graph,
    shortest_paths,
    split_edges,
    split_nodes,
)
from .hyperbolicity import (
    EmpiricalDistribution,
    HyperbolicityProfile,
    delta_inf,
    delta_one_exact,
    delta_one_sampled,
    four_point_tau,
    histogram,
    local_profile,
    to_distribution,
)
from .layers import JointSpaceGNN
from .objectives import (
    FermiDiracParams,
    LossWeights,
    fermi_dirac_prob,
    non_uniformity_loss,
    normalize_delta,
    overall_loss,
    wasserstein_1d,
)
from .poincare import (
    BallPoint,
    Curvature,
    exp_at,
    exp_origin,
    hyp_distance,
    log_at,
    log_origin,
    mobius_add,
    mobius_matvec,
    project_to_ball,
)
from .training import (
    RunReport,
    TrainConfig,
    analyze_hyperbolicities,
    evaluate_lp,
    evaluate_nc,
    run_grid,
    run_seeds,
    train,
)

__version__ = "0.1.0"
