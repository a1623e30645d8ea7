"""
End to end from the command line
================================

The same steps as the library demos, driven through ``posmatch`` on a pair
directory: synthesise, match, register, evaluate.
"""

# %%
import json
import tempfile
from pathlib import Path

from posmatch.cli import main

work = Path(tempfile.mkdtemp())
cfg = work / "config.json"
cfg.write_text(json.dumps({"mode": "rigid", "encoding": {"d": 96}}))
pair = work / "pair"

for argv in (
    ["synth", "--config", str(cfg), "--seed", "7", "--n-points", "400", "--overlap", "0.7", "--out", str(pair)],
    ["match", str(pair), "--config", str(cfg)],
    ["register-rigid", str(pair), "--config", str(cfg)],
    ["eval", str(pair), "--config", str(cfg)],
):
    print("$ posmatch", " ".join(argv[:2]), "...")
    assert main(argv) == 0

# %%
report = json.loads((pair / "report.json").read_text())
print(json.dumps(report["pairs"][0], indent=2))
