HYDRA_VERSION_BASE = "1.3"

#: aging factors explored when selecting the ARU configuration on validation loss
AGING_FACTOR_GRID = (1.0, 0.99, 0.95, 0.9)
