from .chain import (ButterflyChain, ButterflyFactor, ChainSpec, OpCounter, SupportPattern,
                    chain_matvec, chain_to_dense, enumerate_monotone_chains, is_monotone_chain,
                    pattern_nnz, random_chain, select_min_param_chain, square_chain_spec,
                    square_pattern)
from .layers import (ButterflyConv2d, ButterflyDense, ButterflyMap, ParamCount,
                     count_model_params, densify, substitute_butterfly)
