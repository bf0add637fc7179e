"""Independent exposition parsing via prometheus_client, plus a random sample generator."""
import random
import warnings

from prometheus_client.parser import text_string_to_metric_families

from drifter.export import MetricSample

_LABEL_CHARS = 'abcXYZ019 _-:/"\\\n{},=é€'


def parse_independent(text):
    """Samples as (family, labels, value, kind) using the reference client parser."""
    out = []
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        for fam in text_string_to_metric_families(text):
            for s in fam.samples:
                out.append(MetricSample(s.name, tuple(s.labels.items()), s.value, fam.type))
    return out


def random_samples(rng: random.Random, max_families=8, max_series=6):
    samples = []
    for f in range(rng.randint(0, max_families)):
        kind = rng.choice(["gauge", "counter"])
        family = f"drifter_{rng.choice(['x', 'feature_', 'q:'])}{f}" + ("_total" if kind == "counter" else "")
        names = sorted(rng.sample(["feature", "q", "kind", "event", "_z"], rng.randint(0, 3)))
        seen = set()
        for _ in range(rng.randint(1, max_series)):
            labels = tuple((n, "".join(rng.choice(_LABEL_CHARS) for _ in range(rng.randint(0, 8))))
                           for n in names)
            if labels in seen:
                continue
            seen.add(labels)
            value = rng.choice([0.0, -0.0, 1.0, 0.1, 1e-300, 1e300, -2.5, float("inf"), float("-inf"),
                                rng.uniform(-1e6, 1e6), float(rng.randint(0, 2**53))])
            if kind == "counter":
                value = abs(value)
            samples.append(MetricSample(family, labels, value, kind))
    return samples
