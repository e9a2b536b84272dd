# The experiment suites behind one CLI call each: ablation flags, feature
# sources for the predictor, and the alpha sweep. Everything runs on a tiny
# synthetic config so the whole script takes seconds.

import json
import tempfile
from pathlib import Path

from ats2s import cli

workdir = Path(tempfile.mkdtemp(prefix="ats2s_demo_"))
config = {
    "synth": {"fleet_size": 3, "length_range": [36, 40], "test_fleet_size": 3},
    "seq_len": 10, "hidden": 5, "attention_width": 4, "predictor_hidden": [6],
    "epochs": 1, "batch_size": 16, "window_stride": 2, "seed": 11,
    "out": str(workdir / "out"),
}
cfg_path = workdir / "run.json"
cfg_path.write_text(json.dumps(config))
print("config:", cfg_path)

# Ablation: basic seq2seq, +reconstruction, +attention, full. Each line the
# CLI prints below is that variant's full configuration echo; the table at
# the end compares test RMSE and score.

print("\n== experiment ablation ==")
code = cli.main(["experiment", "ablation", "--config", str(cfg_path)])
print("exit:", code)

# Feature importance: which latent feeds the RUL predictor.

print("\n== experiment features ==")
code = cli.main(["experiment", "features", "--config", str(cfg_path)])
print("exit:", code)

# Alpha sweep: the weight on the reconstruction term of the joint loss.

print("\n== experiment alpha ==")
code = cli.main(["experiment", "alpha", "--values", "0.1,1,10",
                 "--config", str(cfg_path)])
print("exit:", code)

print("\nartifacts under:", workdir / "out")
for p in sorted((workdir / "out").iterdir()):
    print(" ", p.name)
