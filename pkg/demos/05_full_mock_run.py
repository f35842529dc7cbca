# Every stage end to end on the fixture corpus, offline
#
# Same as `aspectqa run-all --config tests/fixtures/mock_config.json --mock`
# but writing into a temporary directory.
import json
import shutil
import tempfile
from pathlib import Path

from aspectqa.config import load_config
from aspectqa.pipeline import Pipeline

fixtures = Path(__file__).resolve().parent.parent / "tests" / "fixtures"
work = Path(tempfile.mkdtemp())
shutil.copytree(fixtures / "books", work / "books")
shutil.copy(fixtures / "manifest.json", work / "manifest.json")
(work / "config.json").write_text(json.dumps({"corpus_manifest": "manifest.json", "output_dir": "out"}))

# %% Run
cfg = load_config(work / "config.json")
print("config digest", cfg.digest())
pipe = Pipeline(cfg)
print(pipe.run_all())

# %% Per-aspect and per-size tables were written too
print((work / "out" / "reports" / "size.txt").read_text())
print(sorted(p.relative_to(work / "out").as_posix() for p in (work / "out").rglob("*") if p.is_file())[:12])

# %% A second run finds every artifact up to date and makes no model calls
Pipeline(cfg).run_all()
print(json.loads((work / "out" / "run.json").read_text())["stats"])
shutil.rmtree(work)
