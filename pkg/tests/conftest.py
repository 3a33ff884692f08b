"""Shared fixtures: synthetic feature corpora and a CLI runner."""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pytest

from kde_ood.cli import main as cli_main
from kde_ood.features import LayerFeatureSet, write_feature_file, write_manifest

LAYER_IDS = ("stage1", "stage2", "stage3")
LAYER_CHANNELS = (5, 7, 4)


@dataclass
class Corpus:
    """Synthetic multi-layer feature files standing in for a real extractor."""

    root: Path
    paths: dict = field(default_factory=dict)  # role/name -> feature file path
    arrays: dict = field(default_factory=dict)  # role/name -> {layer_id: matrix}
    layer_ids: tuple = LAYER_IDS

    def write_config(self, name="config.json", **overrides):
        cfg = {
            "in_dist": str(self.paths["train"]),
            "perturbed": str(self.paths["perturbed"]),
            "n": 60,
            "seed": 11,
            "metric": "l1",
            "out": str(self.root / "out"),
        }
        cfg.update(overrides)
        path = self.root / name
        path.write_text(json.dumps(cfg, indent=2), encoding="utf-8")
        return path


def _layer_matrices(rng, n_rows, shift):
    layers = {}
    for pos, (layer_id, channels) in enumerate(zip(LAYER_IDS, LAYER_CHANNELS)):
        # deeper layers shift further, like real OOD signatures
        mean = shift * (pos + 1) / len(LAYER_IDS)
        layers[layer_id] = rng.normal(mean, 1.0, size=(n_rows, channels)).astype(np.float32)
    return layers


def _write_dataset(corpus, name, role, layers):
    path = corpus.root / f"{name}.kdef"
    fset = LayerFeatureSet(name, [(lid, layers[lid]) for lid in LAYER_IDS])
    write_feature_file(fset, path)
    write_manifest(fset, path, role, source_path=f"synthetic://{name}")
    corpus.paths[name] = path
    corpus.arrays[name] = layers
    return path


def build_corpus(root, seed=7, m_train=80, m_test=40, m_ood=40,
                 noise=0.35, ood_shifts=None):
    """Write train/test/perturbed plus mean-shifted OOD feature files."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    corpus = Corpus(root=root)

    train = _layer_matrices(rng, m_train, shift=0.0)
    _write_dataset(corpus, "train", "in_distribution_train", train)
    _write_dataset(corpus, "test", "in_distribution_test",
                   _layer_matrices(rng, m_test, shift=0.0))
    perturbed = {
        lid: (mat + rng.normal(0.0, noise, size=mat.shape)).astype(np.float32)
        for lid, mat in train.items()
    }
    _write_dataset(corpus, "perturbed", "perturbed", perturbed)
    for name, shift in (ood_shifts or {"oodA": 4.0, "oodB": 5.0, "oodC": 3.5}).items():
        _write_dataset(corpus, name, "ood", _layer_matrices(rng, m_ood, shift=shift))
    return corpus


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    return build_corpus(tmp_path_factory.mktemp("corpus"))


@pytest.fixture
def make_corpus(tmp_path):
    def factory(**kwargs):
        return build_corpus(tmp_path / "corpus", **kwargs)

    return factory


def run_cli(*argv):
    """Invoke the CLI in-process; argparse exits become return codes."""
    try:
        return cli_main([str(a) for a in argv])
    except SystemExit as exc:
        return int(exc.code or 0)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = []
    for verdict in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(verdict, []):
            nodeid = getattr(report, "nodeid", "")
            if "test_acceptance" in nodeid and "::" in nodeid:
                label = "PASS" if verdict == "passed" else "FAIL"
                lines.append(f"{label}  {nodeid.split('::')[-1]}")
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(lines, key=lambda s: s.split()[-1]):
            terminalreporter.write_line(line)
