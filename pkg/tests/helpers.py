"""Shared builders for tests that need small prepared datasets."""

from hiercnn import pipeline, synth
from hiercnn.config import RunConfig, reduced_model_settings
from hiercnn.corpus import parse_morphology_code


def separable_spec(seed=0, per_class=50):
    """Two classes with disjoint keyword lists, no overlap and every slot a
    keyword: the class is fully determined by which keywords occur."""
    classes = [(parse_morphology_code("8500/3"), per_class), (parse_morphology_code("8520/3"), per_class)]
    return synth.SynthSpec(classes, overlap_rate=0.0, keyword_injection_rate=1.0, seed=seed)


def prepared(spec, seed=0, **model):
    corpus, manifest = synth.generate(spec)
    cfg = RunConfig(seed=seed, model={**reduced_model_settings(), **{k: str(v) for k, v in model.items()}})
    data, _ = pipeline.prepare(corpus, cfg)
    return data, cfg, manifest


class Item:
    def __init__(self, id, label):
        self.id, self.label = id, label
