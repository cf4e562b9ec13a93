from .recurrent import (
    NetworkShape,
    Parameters,
    SequenceBatch,
    SequenceSample,
    StatePolicy,
    activation,
    as_batch,
    final_states,
    flatten,
    parameters_from_dict,
    parameters_to_dict,
    predict_outputs,
    residual_gradient,
    residual_jacobian,
    residuals,
    sse,
    step,
    unflatten,
)

__all__ = [
    "NetworkShape",
    "Parameters",
    "SequenceBatch",
    "SequenceSample",
    "StatePolicy",
    "activation",
    "as_batch",
    "final_states",
    "flatten",
    "parameters_from_dict",
    "parameters_to_dict",
    "predict_outputs",
    "residual_gradient",
    "residual_jacobian",
    "residuals",
    "sse",
    "step",
    "unflatten",
]
