"""Quick end-to-end check of the Python extension.

Build first, e.g. `maturin develop -m crates/python/Cargo.toml`, or copy
target/release/libfairaudit.so next to this file as fairaudit.so.
"""

import json
import math
import tempfile
from pathlib import Path

import fairaudit as fa


def main():
    v = fa.hash_embed_field("python rust sql", d=32, seed=1)
    assert len(v) == 32
    assert math.isclose(sum(x * x for x in v), 1.0, rel_tol=1e-5)
    assert fa.hash_embed_field("", d=8) == [0.0] * 8
    assert math.isclose(fa.pairwise_similarity(v, v), 1.0, rel_tol=1e-6)

    rows = [[1.0, 0, 0, 0, 0], [0.9, 0.1, 0, 0, 0], [0, 1.0, 0, 0, 0], [0, 0.9, 0.1, 0, 0]]
    m = fa.EmbeddingMatrix(rows, ["a", "b", "c", "d"])
    exact = fa.knn_exact(m, k=1)
    batched = fa.knn_batched(m, k=1, batch_size=3)
    assert exact.neighbors == batched.neighbors == [[1], [0], [3], [2]]
    assert fa.consistency([1, 1, 0, 0], exact) == 1.0
    assert fa.consistency([1, 0, 1, 0], exact) == 0.0

    metrics = fa.classification_metrics([1, 0, 1, 0], [1, 1, 0, 0], averaging="binary")
    assert metrics["accuracy"] == 0.5 and metrics["precision"] == 0.5

    with tempfile.TemporaryDirectory() as tmp:
        corpus = Path(tmp) / "corpus.jsonl"
        assert fa.generate_synthetic(str(corpus), n=80, seed=3, noise_sigma=0.2, bias={1: 0.2}) == 80
        emb = fa.EmbeddingMatrix.from_corpus(str(corpus), d=16)
        assert (emb.n_rows, emb.dim) == (80, 80)
        nbrs = fa.knn_reranked(emb, k=5)
        assert len(nbrs) == 80
        again = fa.NeighborList.from_json(nbrs.to_json())
        assert again.neighbors == nbrs.neighbors

        report = fa.run_audit(str(corpus), out=str(Path(tmp) / "run"), seed=3, d=16, trials=2)
        assert report.sources[:3] == ["human:SL", "human:AR", "human:OF"]
        for row in report.rows:
            for key in ("precision", "recall", "f1", "accuracy", "c_ar", "c_of"):
                assert row[key] is None or 0.0 <= row[key] <= 1.0
        assert report.render().startswith("| Model | P | R | F1 | A | C(AR) | C(OF) |")
        loaded = fa.AuditReport.load(str(Path(tmp) / "run" / "report.json"))
        assert json.loads(loaded.render("json"))["rows"] == report.rows
        print(report.render())
        print(json.dumps(report.compare("model:birnn", "human:OF"), indent=2))

    try:
        fa.knn_exact(m, k=10)
    except ValueError as e:
        assert "k = 10" in str(e)
    else:
        raise AssertionError("k larger than N was accepted")
    print("smoke test passed")


if __name__ == "__main__":
    main()
