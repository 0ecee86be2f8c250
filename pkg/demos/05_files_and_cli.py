"""
Files and the command line
==========================

Models, heads, scenes and results share one checksummed record format, so
a scene written by ``mvfuse synth`` can be optimized, evaluated and swept
from the shell. Here the same commands run in-process.
"""

import tempfile
from pathlib import Path

from mvfuse import container
from mvfuse.cli import main
from mvfuse.sceneio import load_scene

work = Path(tempfile.mkdtemp())
scene_path = work / "scene.bin"

main(["synth", "--out", str(scene_path), "--seed", "1"])
main(["init", str(scene_path), "--strategy", "weighted"])
main(["optimize", str(scene_path), "--out-dir", str(work / "run"), "--steps", "100"])
main(["eval", str(work / "run" / "result.bin"), str(scene_path)])
main(["ablate", str(scene_path), "--axis", "steps", "--values", "0,50,100"])

# a single flipped bit is caught on load
blob = bytearray(scene_path.read_bytes())
blob[len(blob) // 2] ^= 0x10
(work / "broken.bin").write_bytes(bytes(blob))
try:
    load_scene(work / "broken.bin")
except container.FormatError as exc:
    print(f"corrupted scene rejected: {type(exc).__name__}: {exc}")
