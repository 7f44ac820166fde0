from .registry import (
    MetricSpec as MetricSpec,
    metrics as metrics,
    register_metric as register_metric,
    get_metric as get_metric,
    get_parameters_details as get_parameters_details,
)
