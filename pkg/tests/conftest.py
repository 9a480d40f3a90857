import hypothesis

# the suite must be reproducible run to run
hypothesis.settings.register_profile(
    "ci", hypothesis.settings(derandomize=True, max_examples=50, deadline=None))
hypothesis.settings.load_profile("ci")
