"""Pin BLAS thread counts before numpy loads so replays are deterministic."""

import os

_count = os.environ.get("POLYAVSR_THREADS", "1")
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
             "NUMEXPR_NUM_THREADS"):
    os.environ.setdefault(_var, _count)
