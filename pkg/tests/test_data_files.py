"""The checked-in scenario files must equal freshly built bundles exactly."""

import json
from pathlib import Path

from consensus_mpc.scenario_lib import (
    build_mineshaft,
    build_rendezvous,
    load_scenario,
    scenario_to_dict,
)

DATA_DIR = Path(__file__).resolve().parents[1] / "src" / "consensus_mpc" / "data"


def test_rendezvous_file_matches_builder():
    on_disk = json.loads((DATA_DIR / "rendezvous.json").read_text())
    assert on_disk == scenario_to_dict(build_rendezvous(0.101))


def test_mineshaft_file_matches_builder():
    on_disk = json.loads((DATA_DIR / "mineshaft.json").read_text())
    assert on_disk == scenario_to_dict(build_mineshaft())


def test_files_load_as_valid_bundles():
    for name in ("rendezvous", "mineshaft"):
        bundle = load_scenario(DATA_DIR / f"{name}.json")
        assert bundle.name == name
