import json
import os

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hsverify.algebra_core import matrix_to_pairs
from hsverify.cli import RunConfig, load_report, main, validate_report


def raw_orthogonal_11(M, eta=-1):
    sig = np.diag([1.0, -1.0])
    return {"raw": {"s": matrix_to_pairs(sig),
                    "taus": [{"kind": "minus-transpose-conjugate-by-M", "eta": eta, "matrix": matrix_to_pairs(M)}]},
            "name": "raw O(1,1)"}


def write_config(tmp_path, cls, **extra):
    path = tmp_path / "config.json"
    cfg = RunConfig(cls, **extra)
    path.write_text(json.dumps(cfg.to_dict()))
    return str(path)


def test_dims_output(capsys):
    assert main(["dims", "--preset", "orthogonal", "--p", "1", "--q", "1"]) == 0
    out = capsys.readouterr().out
    assert "class O(1,1)" in out
    assert "g=1  k=0  p=1  Q=3  Qplus=2  Qminus=1" in out
    assert "det ad(s): p -> Q-         +2.000000e+00" in out


def test_dims_unitary_21(capsys):
    assert main(["dims", "--preset", "U", "--p", "2", "--q", "1"]) == 0
    assert "g=9  k=5  p=4  Q=9  Qplus=5  Qminus=4" in capsys.readouterr().out


def test_raw_config_equals_preset(tmp_path, capsys):
    path = write_config(tmp_path, raw_orthogonal_11(np.diag([1.0, -1.0])))
    assert main(["dims", "--config", path]) == 0
    assert "g=1  k=0  p=1  Q=3  Qplus=2  Qminus=1" in capsys.readouterr().out


def test_corrupted_raw_config_names_the_failure(tmp_path, capsys):
    path = tmp_path / "bad.json"
    cfg = RunConfig(raw_orthogonal_11(np.diag([1.0, -1.0]))).to_dict()
    cfg["class"]["raw"]["taus"][0]["matrix"] = matrix_to_pairs(np.array([[1.0, 1.0], [0.0, 1.0]]))
    path.write_text(json.dumps(cfg))
    assert main(["dims", "--config", str(path)]) == 1
    assert "tau1 is not an involution" in capsys.readouterr().err


def test_missing_class_is_an_error(capsys):
    assert main(["dims", "--preset", "orthogonal"]) == 1
    assert "--config" in capsys.readouterr().err


@pytest.mark.parametrize("preset,lam,value", [("orthogonal", "-2,1", "-3"), ("Sp", "2,0", "16"),
                                              ("unitary", "3,1", "4"), ("unitary", "1,1", "0")])
def test_jacobian_examples(preset, lam, value, capsys):
    assert main(["jacobian", "--preset", preset, "--p", "1", "--q", "1", f"--lam={lam}"]) == 0
    first = capsys.readouterr().out.splitlines()[0]
    assert first.endswith(f"= {value}")


def test_jacobian_bad_length(capsys):
    assert main(["jacobian", "--preset", "U", "--p", "1", "--q", "1", "--lam", "1,1,1"]) == 1
    assert "length" in capsys.readouterr().err


def test_roots_and_cones_run(capsys):
    assert main(["roots", "--preset", "U", "--p", "2", "--q", "1"]) == 0
    assert "multiplicity 2" in capsys.readouterr().out
    assert main(["cones", "--preset", "O", "--p", "2", "--q", "2"]) == 0
    assert "sign constancy True" in capsys.readouterr().out


def test_verify_all_orthogonal_11(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["verify", "all", "--preset", "orthogonal", "--p", "1", "--q", "1", "--out", str(out)]) == 0
    payload = load_report(str(out / "report.json"))
    targets = [r["target"] for r in payload["reports"]]
    assert targets[0] == "euclid" and "ps" in targets and "cor21" in targets
    assert sum(t.startswith("sw") for t in targets) == 3
    header = (out / "trace.csv").read_text().splitlines()[0]
    assert header == "eps,re,im,stderr"


def test_sign_control_reports_mismatch(capsys):
    assert main(["verify", "ps", "--preset", "orthogonal", "--p", "1", "--q", "1", "--sign-control"]) == 1
    assert "sign mismatch" in capsys.readouterr().out


def test_precondition_error_for_bad_A(tmp_path, capsys):
    path = write_config(tmp_path, {"preset": "orthogonal", "p": 1, "q": 1},
                        A={"mode": "explicit", "matrices": [matrix_to_pairs(np.diag([-1.0, 1.0]))]})
    assert main(["verify", "ps", "--config", path]) == 1
    assert "precondition error" in capsys.readouterr().err


def test_inconclusive_exit_code(capsys):
    code = main(["verify", "ps", "--preset", "unitary", "--p", "1", "--q", "1", "--fit-tol", "1e-6"])
    assert code == 2
    assert "inconclusive" in capsys.readouterr().out


def test_reports_are_byte_identical(tmp_path, capsys):
    args = ["verify", "ps", "--preset", "unitary", "--p", "1", "--q", "1", "--n-a", "2"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    for name in ("report.json", "trace.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_validate_report_rejects_tampering(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["verify", "ps", "--preset", "orthogonal", "--p", "1", "--q", "1", "--out", str(out)]) == 0
    payload = json.loads((out / "report.json").read_text())
    validate_report(payload)
    payload["reports"][0]["verdict"] = "fail"
    with pytest.raises(ValueError, match="does not match"):
        validate_report(payload)
    del payload["reports"][0]["trace"]
    with pytest.raises(ValueError, match="lacks"):
        validate_report(payload)


@given(eps=st.lists(st.floats(0.06, 1.0), min_size=1, max_size=4, unique=True), last=st.floats(1e-3, 0.05),
       seed=st.integers(0, 2 ** 31), samples=st.integers(1000, 10 ** 6), tol=st.floats(1e-4, 0.5),
       sign=st.booleans(), count=st.integers(1, 5))
def test_run_config_round_trip(eps, last, seed, samples, tol, sign, count):
    eps = sorted(eps, reverse=True) + [last]
    cfg = RunConfig({"preset": "symplectic", "p": 1, "q": 2}, eps_values=eps, seed=seed, samples=samples,
                    batch=min(samples, 20_000), tol_rel=tol, sign_control=sign,
                    A={"mode": "sampled", "delta": 0.5, "seed": None, "scale": 0.25, "count": count})
    again = RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg


def test_run_config_rejects_unknown_backend():
    with pytest.raises(ValueError, match="backend"):
        RunConfig({"preset": "U", "p": 1, "q": 1}, backend="magic")


def test_report_file_is_reparsable(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["verify", "sw", "--preset", "unitary", "--p", "1", "--q", "1", "--samples", "20000",
                 "--out", str(out)]) in (0, 1)
    payload = load_report(os.path.join(out, "report.json"))
    cfg = RunConfig.from_dict(payload["provenance"]["config"])
    assert cfg.samples == 20000 and cfg.out is None
