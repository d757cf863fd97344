# %% [markdown]
# # Command-line walkthrough
#
# The same flow as the Python demos through the `cpwstitch` command: detect
# features, stitch with them, then score a result. Each call goes through
# `cli.main`, which is what the installed `cpwstitch` script runs.

# %%
import json
from pathlib import Path

from cpwstitch import save_image
from cpwstitch.cli import main
from cpwstitch.synthetic import parallax_pair

OUT = Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)
img1, img2, _, _ = parallax_pair(seed=4, width=400, height=300)
save_image(img1, OUT / "left.png")
save_image(img2, OUT / "right.png")


def run(*argv):
    print("$ cpwstitch", " ".join(argv))
    code = main(list(argv))
    print(f"exit {code}\n")
    return code


# %%
run("features", str(OUT / "left.png"), str(OUT / "right.png"), "-o", str(OUT / "corr.json"))

# %%
run("stitch", str(OUT / "left.png"), str(OUT / "right.png"), "-o", str(OUT / "pano.png"),
    "--correspondences", str(OUT / "corr.json"), "--report", str(OUT / "report.json"),
    "--mesh", "16", "--levels", "2", "--weights", "1,1,1,1,0.2,1")
rep = json.loads((OUT / "report.json").read_text())
print("global", rep["rmse_ncc_global"], "-> final", rep["rmse_ncc"])

# %% [markdown]
# A flat image has no features, so stitching fails in the FEATURES stage with
# exit code 3. Usage problems such as a missing file give exit code 2.

# %%
save_image(img1.data * 0 + 0.5, OUT / "flat.png")
run("stitch", str(OUT / "flat.png"), str(OUT / "flat.png"), "-o", str(OUT / "never.png"))
run("eval", str(OUT / "missing.png"), str(OUT / "right.png"))
