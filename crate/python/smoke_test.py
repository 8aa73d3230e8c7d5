"""Smoke test for the `wordart` Python extension.

Builds the extension with cargo (unless WORDART_LIB points at a built
library), imports it from a scratch directory and exercises the API.

    python3 python/smoke_test.py
"""

import glob
import os
import shutil
import subprocess
import sys
import tempfile

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def locate_library():
    explicit = os.environ.get("WORDART_LIB")
    if explicit:
        return explicit
    subprocess.run(
        ["cargo", "build", "--release", "-p", "wordart-py", "--features", "extension-module"],
        cwd=ROOT,
        check=True,
    )
    for pattern in ("libwordart.so", "libwordart.dylib", "wordart.dll"):
        found = glob.glob(os.path.join(ROOT, "target", "release", pattern))
        if found:
            return found[0]
    sys.exit("built library not found under target/release")


def main():
    scratch = tempfile.mkdtemp(prefix="wordart_smoke_")
    try:
        shutil.copy(locate_library(), os.path.join(scratch, "wordart.so"))
        sys.path.insert(0, scratch)
        import wordart

        font = wordart.Font.builtin()
        assert font.units_per_em > 0
        outline = font.glyph("A", 48.0).normalized().fit_to_canvas(64, 64, 12.0)
        assert outline.segment_count > 0
        assert len(outline.params()) == 8 * outline.segment_count
        assert outline.to_svg(64, 64).startswith("<svg")

        img = wordart.rasterize(outline, 64, 64)
        assert (img.width, img.height, img.channels) == (64, 64, 1)
        assert 0.0 < img.mean() < 1.0
        png = img.to_png()
        assert wordart.Image.from_png(png).width == 64

        depth = wordart.depth_map(img)
        stylized = wordart.mock_stylize("gold filigree", depth, seed=7)
        assert stylized.channels == 3
        again = wordart.mock_stylize("gold filigree", depth, seed=7)
        assert stylized.data() == again.data()
        textured = wordart.mock_texturize("marble", wordart.control_map(stylized), seed=7)
        assert textured.channels == 3

        score = wordart.legibility_score(img, img)
        assert score["legibility"] == 1.0 and score["passed"]

        directives = wordart.plan("A cat in jewelry design")
        assert directives["target_shape"] in wordart.TARGET_SHAPES
        assert wordart.validate_directives(directives) == directives
        try:
            wordart.validate_directives({"num_variants": 0, "semantic_concept": 5})
        except ValueError as err:
            assert "num_variants" in str(err), err
        else:
            raise AssertionError("invalid directives accepted")

        result = wordart.deform("A", target="circle", steps=40)
        assert result["target_iou_after"] >= result["target_iou_before"]

        record = wordart.run_job(
            "A",
            "A cat in jewelry design",
            os.path.join(scratch, "jobs"),
            steps=20,
            threshold=0.0,
        )
        assert record["status"] == "done", record["status"]
        assert len(record["candidates"]) == directives["num_variants"]
        print("smoke test ok:", record["id"], "legibility", score["legibility"])
    finally:
        shutil.rmtree(scratch, ignore_errors=True)


if __name__ == "__main__":
    main()
