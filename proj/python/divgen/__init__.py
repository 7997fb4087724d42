"""Diversity-optimized synthetic dataset generation.

Thin python surface over the C++ core: kernel construction, determinant
machinery (marginal gains, exact k-DPP sampling), diversity metrics, and
the full generation loop against the offline mock provider.
"""

from divgen._core import (
    brute_force_k_dpp_probs,
    build_kernel,
    effective_rank_approx,
    greedy_map_select,
    jaccard_similarity,
    log_det,
    rbf_similarity,
    run_baseline,
    run_generation,
    sample_k_dpp,
    sequential_gains,
    tokenize,
    vendi_score,
)

__all__ = [
    "brute_force_k_dpp_probs",
    "build_kernel",
    "effective_rank_approx",
    "greedy_map_select",
    "jaccard_similarity",
    "log_det",
    "rbf_similarity",
    "run_baseline",
    "run_generation",
    "sample_k_dpp",
    "sequential_gains",
    "tokenize",
    "vendi_score",
]
