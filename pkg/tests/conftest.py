import hypothesis
import numpy as np

np.seterr(all="warn", under="ignore")

hypothesis.settings.register_profile(
    "default", deadline=None, max_examples=50, derandomize=True
)
hypothesis.settings.load_profile("default")


def assert_monotone_trace(trace, slack=1e-8):
    """EM log-likelihood traces must never decrease beyond float slack."""
    for earlier, later in zip(trace[:-1], trace[1:]):
        assert later >= earlier - slack, f"trace decreased: {earlier} -> {later}"
