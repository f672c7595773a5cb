"""fedshield: a desk-scale federated learning simulator for studying targeted
label-flipping attacks and similarity-profile-based defenses.

The package provides synthetic/CSV data handling with Dirichlet client
partitioning, a small feed-forward classifier trained with plain SGD,
robust baseline aggregators (FedAvg, Krum, coordinate median, trimmed mean,
FLAME-lite), and the GShield defense that profiles benign gradient
similarity during an attack-free warm-up and filters outliers afterwards.
"""

__version__ = "0.1.0"
