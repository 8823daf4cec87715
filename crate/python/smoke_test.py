"""Smoke test for the dsdkit extension module.

Build and run from the repository root:

    cargo build --release -p dsdkit-python --features extension-module
    cp target/release/libdsdkit.so python/dsdkit.so
    python3 python/smoke_test.py
"""

import json
import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import dsdkit  # noqa: E402


def check_cleaning(tmp):
    table, truth, mask = dsdkit.synth(seed=0)
    assert len(table) == 2000 and table.num_classes == 5
    assert sum(mask) == 400
    noisy = [row[0] for row, m in zip(table.rows(), mask) if m]

    cl = dsdkit.clean(table, plain=True)
    trcl = dsdkit.clean(table)
    assert dsdkit.clean(table, alpha=0.0).flagged == cl.flagged
    cl_noise, cl_nca, cl_left = dsdkit.cleaning_metrics(cl.flagged_ids(), noisy)
    tr_noise, tr_nca, tr_left = dsdkit.cleaning_metrics(trcl.flagged_ids(), noisy)
    print(f"CL   flagged {len(cl):4d}  NCA {cl_nca:6.2f}  remaining {cl_left}")
    print(f"TRCL flagged {len(trcl):4d}  NCA {tr_nca:6.2f}  remaining {tr_left}")
    assert tr_left <= cl_left
    assert abs(sum(map(sum, trcl.joint)) - 1.0) < 1e-9
    assert trcl.iterations[0] == len(cl)

    path = os.path.join(tmp, "report.json")
    trcl.save(path)
    again = dsdkit.NoiseReport.from_json(open(path).read())
    assert again.to_json() == trcl.to_json()
    assert json.loads(trcl.to_json())["config"]["strategy"] == 4

    csv = os.path.join(tmp, "preds.csv")
    table.save_csv(csv)
    assert dsdkit.PredictionTable.load_csv(csv).rows() == table.rows()

    try:
        dsdkit.PredictionTable(2, [(0, "v", 0, 0, [0.5, 0.4])])
    except ValueError as e:
        assert "sum" in str(e)
    else:
        raise AssertionError("row summing to 0.9 accepted")


def check_metrics():
    m = dsdkit.metrics([0, 1, 1, 2], [0, 1, 2, 2], 3)
    assert m["macro"]["acc"] == 75.0
    assert m["per_class"][1]["fp"] == 1
    rer = dsdkit.relative_error_reduction(1.43, 0.98)
    assert abs(rer - 31.47) < 0.15
    assert dsdkit.relative_error_reduction(0.0, 1.0) is None


def check_scan():
    p = dsdkit.SsmParams(4, 8, seed=1)
    x = [math.sin(0.3 * i) for i in range(32 * 4)]
    fast, slow = p.scan(x, 32), p.reference_scan(x, 32)
    scale = max(abs(v) for v in slow)
    assert max(abs(a - b) for a, b in zip(fast, slow)) <= 1e-5 * scale


def check_model(tmp):
    model = dsdkit.Model(seed=7)
    image = [((i * 37) % 101) / 50.0 - 1.0 for i in range(64 * 64 * 3)]
    probs = model.forward(image)
    assert len(probs) == 10 and abs(sum(probs) - 1.0) < 1e-5
    assert model.num_params() == dsdkit.count_params(model.config_json())

    wdir = os.path.join(tmp, "weights")
    model.save_weights(wdir)
    again = dsdkit.Model(model.config_json(), weights_dir=wdir)
    assert again.forward(image) == probs

    tpath = os.path.join(tmp, "t.dsd")
    dsdkit.write_tensor(tpath, [2, 3], [0.5 * i for i in range(6)])
    assert dsdkit.read_tensor(tpath) == ([2, 3], [0.5 * i for i in range(6)])


def main():
    with tempfile.TemporaryDirectory() as tmp:
        check_cleaning(tmp)
        check_metrics()
        check_scan()
        check_model(tmp)
    failed = [c for c in dsdkit.verify(0) if not c[1]]
    assert not failed, failed
    print("smoke test ok")


if __name__ == "__main__":
    main()
