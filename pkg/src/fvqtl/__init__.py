"""QTL mapping for function-valued traits."""

from .core_io import CrossType, GeneticMap, GenotypeMatrix, PhenotypeMatrix, read_dataset
from .genoprob import GenoProbs, calc_genoprob
from .modelsel import Locus, QtlModel, fit_effects, model_lod, profile, stepwise_search
from .scan import Stat, permutation_threshold, scan_hk

__version__ = "0.1.0"

__all__ = [
    "CrossType", "GeneticMap", "GenotypeMatrix", "PhenotypeMatrix", "read_dataset",
    "GenoProbs", "calc_genoprob",
    "Locus", "QtlModel", "fit_effects", "model_lod", "profile", "stepwise_search",
    "Stat", "permutation_threshold", "scan_hk",
]
