"""The nine classifier families behind one fit / predict contract."""

from .core import (
    DEFAULT_HYPERPARAMETERS,
    TREE_FAMILIES,
    Family,
    FittedModel,
    HyperparameterError,
    LearnerSpec,
    canonical_order,
    fit,
    load_model,
    model_from_dict,
    predict,
    predict_proba,
    save_model,
)
from .simple import (
    GaussianNbModel,
    KnnModel,
    LinearSvmModel,
    MlpModel,
    MnlModel,
    fit_gaussian_nb,
    fit_knn,
    fit_linear_svm,
    fit_mlp,
    fit_mnl,
    mlp_loss_and_grad,
    mnl_loss_and_grad,
    svm_objective_and_grad,
)
from .trees import (
    BaggingModel,
    BoostedModel,
    CartModel,
    ForestModel,
    Split,
    Tree,
    best_split,
    fit_bagging,
    fit_cart,
    fit_gradient_boosting,
    fit_random_forest,
    impurity_importance,
)

__all__ = [name for name in dir() if not name.startswith("_")]
