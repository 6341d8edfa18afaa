import os

# single-threaded BLAS keeps training runs bit-reproducible; must be set
# before numpy loads its backend
for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS",
            "NUMEXPR_NUM_THREADS"):
    os.environ.setdefault(var, "1")
