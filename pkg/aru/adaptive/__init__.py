from aru.adaptive.unit import (
    AruConfig,
    AruConfigError,
    AruState,
    AruStateMismatchError,
    aru_init,
    aru_local_params,
    aru_predict,
    aru_update,
    augment,
    load_states,
    predict_from_params,
    save_states,
    stack_states,
    unstack_states,
)

__all__ = [
    "AruConfig",
    "AruConfigError",
    "AruState",
    "AruStateMismatchError",
    "aru_init",
    "aru_local_params",
    "aru_predict",
    "aru_update",
    "augment",
    "load_states",
    "predict_from_params",
    "save_states",
    "stack_states",
    "unstack_states",
]
