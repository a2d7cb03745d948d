"""End-to-end replay in which the informative sensors change mid-run.

Writes the desk-scale fixtures to a temporary directory and runs the
bundled drift configuration.  Before minute 100 the attack shows on one set
of sensors; afterwards it moves to another.  The monitored metrics breach
their thresholds, AutoFS re-selects the features and the new model serves
the rest of the replay.  Takes about a minute.

    python demos/03_drift_replay.py
"""

import tempfile
from pathlib import Path

from twinguard import pipeline
from twinguard.config import load_config

with tempfile.TemporaryDirectory() as tmp:
    out = Path(tmp)
    pipeline.make_fixtures(out, seed=0)
    report = pipeline.run_detection(load_config(out / "drift.yaml"), out / "run")
    twin = report["twins"][0]
    print(f"bootstrap winner: {twin['bootstrap']['winner']} {twin['bootstrap']['indices']}")
    for row in twin["metrics"]:
        print(f"tick {row['tick']:>6}  model v{row['model_version']}  "
              + "  ".join(f"{k} {row[k]:.3f}" for k in ("accuracy", "precision", "recall", "f_measure"))
              + f"  -> {row['action']}")
    for t in twin["triggers"]:
        print(f"AutoFS at tick {t['tick']}: breached {t['breached']}, new winner {t['autofs']['winner']} "
              f"{t['autofs']['indices']}")
    print(f"final model v{twin['final_model_version']} ({twin['final_method']})")
