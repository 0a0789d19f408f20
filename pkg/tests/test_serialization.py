import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ildm.demos import collect_demos
from ildm.instances import random_layered_mdp
from ildm.mdp import TabularPolicy
from ildm.serialization import (
    ArtifactError, load_demos, load_json, load_mdp, load_policy, mdp_from_dict, mdp_to_dict,
    policy_from_dict, save_demos, save_json, save_mdp, save_policy,
)


@given(st.integers(0, 2**32 - 1))
def test_mdp_roundtrip_is_bit_exact(seed):
    rng = np.random.default_rng(seed)
    mdp, _ = random_layered_mdp(rng.integers(1, 4, size=int(rng.integers(1, 4))), 2, rng)
    back = mdp_from_dict(json.loads(json.dumps(mdp_to_dict(mdp))))
    for a, b in zip(mdp.transitions + mdp.reward, back.transitions + back.reward):
        assert np.array_equal(a, b)
    assert back.content_hash() == mdp.content_hash()
    assert back.metadata == mdp.metadata


def test_files_roundtrip(tmp_path, small):
    mdp, expert, demo = small
    save_mdp(tmp_path / "a" / "mdp.json", mdp)
    save_policy(tmp_path / "expert.json", expert)
    save_demos(tmp_path / "demos.json", demo)
    back = load_mdp(tmp_path / "a" / "mdp.json")
    assert back.content_hash() == mdp.content_hash()
    assert np.array_equal(load_policy(tmp_path / "expert.json", back).probs[0], expert.probs[0])
    assert np.array_equal(load_demos(tmp_path / "demos.json", back).trajectories,
                          demo.trajectories)


def test_output_is_stable(tmp_path, d5):
    mdp = d5[0]
    save_mdp(tmp_path / "x.json", mdp)
    save_mdp(tmp_path / "y.json", mdp)
    assert (tmp_path / "x.json").read_bytes() == (tmp_path / "y.json").read_bytes()


def test_missing_and_invalid_files(tmp_path):
    with pytest.raises(ArtifactError, match="nope.json: no such file"):
        load_json(tmp_path / "nope.json")
    (tmp_path / "bad.json").write_text("{\"a\": ")
    with pytest.raises(ArtifactError, match="bad.json: invalid JSON"):
        load_mdp(tmp_path / "bad.json")


def test_validation_errors_carry_location(tmp_path, d5):
    doc = mdp_to_dict(d5[0])
    doc["transitions"][0][1][0] = [0.7, 0.7]
    save_json(tmp_path / "m.json", doc)
    with pytest.raises(ArtifactError, match=r"m.json: .*\(h=0, s=1, a=0\).* at \(0, 1, 0\)"):
        load_mdp(tmp_path / "m.json")
    del doc["reward"]
    with pytest.raises(ArtifactError, match="missing field 'reward'"):
        mdp_from_dict(doc, "doc")
    doc = mdp_to_dict(d5[0])
    doc["horizon"] = 3
    with pytest.raises(ArtifactError, match="horizon 3"):
        mdp_from_dict(doc, "doc")


def test_policy_validation(d5):
    mdp = d5[0]
    with pytest.raises(ArtifactError, match="shape"):
        policy_from_dict({"probs": [[[1.0, 0.0]], [[1.0, 0.0]]]}, mdp)
    with pytest.raises(ArtifactError, match="distributions"):
        policy_from_dict({"probs": [[[0.5, 0.6], [1, 0]], [[1, 0], [1, 0]]]}, mdp)
    with pytest.raises(ArtifactError, match="1 layers"):
        policy_from_dict({"probs": [[[1, 0], [1, 0]]]}, mdp)
    assert isinstance(policy_from_dict({"probs": [[[1, 0], [0, 1]]] * 2}, mdp), TabularPolicy)


def test_demo_hash_mismatch(tmp_path, d5, small):
    save_demos(tmp_path / "d.json", collect_demos(small[0], small[1], 2, np.random.default_rng(0)))
    with pytest.raises(ArtifactError, match="does not match"):
        load_demos(tmp_path / "d.json", d5[0])
