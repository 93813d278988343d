from hypothesis import HealthCheck, settings

# Derandomized so the whole suite is bit-identical across runs, matching the
# determinism contract the package itself is held to.
settings.register_profile(
    "repo",
    derandomize=True,
    deadline=None,
    max_examples=50,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("repo")
