"""Decode through an external adapter process, bit for bit.

Records every logit query a local decode makes into a lookup table, serves
that table from the adapter under frontend/ (a separate Node process
speaking the JSON-lines bridge protocol), and checks the remote decode
reproduces the local one exactly. Build the adapter first:

    cd frontend && npm install && npm run build
"""

import shutil
import sys
from pathlib import Path
from tempfile import TemporaryDirectory

from nolan import AlphaPolicy, DecodeMode, DecodeRequest, decode
from nolan.bridge import connect_stdio, serve_check
from nolan.synthetic import Scene, build_sources, build_vocabulary, compile_prior
from nolan.table import RecordingSource, dump_table

ADAPTER = Path(__file__).parent.parent / "frontend" / "dist" / "cli.js"
if not ADAPTER.exists() or shutil.which("node") is None:
    sys.exit("adapter not built; see the docstring")

vocab = build_vocabulary(("cat", "dog"))
prior = compile_prior([["cat", "dog"], ["dog"], ["cat"]], vocab)
scene = Scene("s0", frozenset({"cat"}))
recorder = RecordingSource(build_sources(scene, prior, vocab))

req = DecodeRequest(
    prompt_tokens=(vocab.index("is_there"), vocab.index("cat")),
    mode=DecodeMode.NOLAN,
    policy=AlphaPolicy.kl_tanh(0.8),
    visual_ref="s0",
    max_new_tokens=4,
)
local = decode(req, recorder, vocab)
print("local decode: ", [vocab.string(t) for t in local.tokens])

with TemporaryDirectory() as tmp:
    table = Path(tmp) / "table.json"
    with open(table, "w") as fh:
        dump_table(vocab.size, recorder.entries, fh)

    src = connect_stdio(["node", str(ADAPTER), "--model", "toy", "--toy", str(table)])
    try:
        remote = decode(req, src, vocab)
        print("remote decode:", [vocab.string(t) for t in remote.tokens])
        assert remote.tokens == local.tokens
        assert all(
            a.gamma == b.gamma and a.alpha_used == b.alpha_used
            for a, b in zip(remote.trace, local.trace)
        )
        print("traces bit-identical across the process boundary")

        probes = [list(ctx) for (mod, ctx) in recorder.entries if mod == "text_only"][:3]
        report = serve_check(src, probe_contexts=probes)
        print("serve-check:", report["checks"], "->", "ok" if report["ok"] else "FAILED")
    finally:
        src.close()
