from .stages import (
    FrozenEmbeddings,
    SignificantComponentSet,
    extract_mask,
    freeze_embeddings,
    local_feature_selection,
    pretrain,
    proxy_loss,
    proxy_risk,
    prune_components,
    refine,
    select_components,
    select_local_features,
)
from .pipelines import (
    FeatureSelectionReport,
    SelectionSettings,
    group_lasso_run,
    less_vfl_run,
    local_lasso_run,
    vfl_run,
)
