"""peshield: harden PE malware detectors against functionality-preserving
adversarial variants, at desk scale.

Subsystems:
    pe        parse/serialize PE images into region-complete layouts
    perturb   functionality-preserving manipulations and traces
    attacks   black-box random and genetic attack drivers
    features  2381-dimensional static feature vectors and standardization
    gbdt      histogram gradient-boosted trees
    linear    logistic regression
    model_io  versioned, digest-checked model persistence
    chain     baseline+plugin chained detector and FPR calibration
    metrics   evaluation reports, flip (regression) accounting, ROC/PR points
    editdist  exact and banded Levenshtein distance
    corpus    JSONL manifests, time splits, imbalance subsampling
    treeshap  path-dependent tree SHAP attribution
    artifacts per-generator attribution summaries
    synth     synthetic PE corpus generation
    cli       command-line front end
"""

__version__ = "0.1.0"
