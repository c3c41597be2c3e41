"""Test-suite setup: pin BLAS threads before numpy loads.

Single-threaded reductions make the numeric tests bit-reproducible and are
faster than thread fan-out at the matrix sizes used here.
"""

import os

for _var in ("OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "OMP_NUM_THREADS",
             "NUMEXPR_NUM_THREADS"):
    os.environ.setdefault(_var, "1")
