"""Smoke test for the pyratsql extension module."""

import math
import sys
import tempfile

import pyratsql as rs

QUESTION = "For the cars with 4 cylinders, which model has the largest horsepower"


def main() -> int:
    schema = rs.Schema.example()
    assert schema.db_id == "car_1"
    assert schema.graph_dot().startswith("digraph")

    links = schema.link(QUESTION)
    cylinders = schema.columns.index("cars_data.cylinders")
    assert any(l.get("column") == cylinders and l["match"] == "ExactMatch" for l in links)
    assert any(l.get("column") == cylinders and l["match"] == "ColumnValue" for l in links)
    n = len(schema.relations(QUESTION))
    assert n > len(schema.columns) + len(schema.tables)

    cfg = rs.TrainConfig.full_scale(max_steps=40000)
    assert math.isclose(cfg.lr_at(1000), 3.7e-4, rel_tol=1e-12)
    assert cfg.lr_at(40000) == 0.0

    train, dev = rs.Corpus.synthetic(seed=4, num_examples=24, dev_examples=6)
    print(f"corpus: {len(train)} train, {len(dev)} dev over {train.db_ids}")

    untrained = rs.Model.untrained(rs.TrainConfig.desk(), dev)
    assert untrained.evaluate(dev, oracle="both")["accuracy"] == 1.0

    config = rs.TrainConfig.desk(max_steps=300, batch_size=4, eval_every=0, patience=0)
    trainer = rs.Trainer(config, train, dev)
    first = [trainer.step()[1] for _ in range(5)]
    again = rs.Trainer(config, train, dev)
    assert first == [again.step()[1] for _ in range(5)]
    metrics = trainer.run()
    assert trainer.finished and len(metrics) == 295

    model = trainer.model()
    db, question, _ = dev.example(0)
    print("predicted:", model.predict(dev.schema(db), question))
    with tempfile.TemporaryDirectory() as tmp:
        path = f"{tmp}/model.json"
        model.save(path)
        reloaded = rs.Model.load(path)
        assert reloaded.predict(dev.schema(db), question) == model.predict(dev.schema(db), question)

    sweep = model.oracle_sweep(dev)
    assert sweep["none"] <= sweep["both"] == 1.0

    try:
        rs.TrainConfig.desk(no_such_field=1)
    except rs.RatSqlError:
        pass
    else:
        raise AssertionError("unknown field accepted")

    print("ok")
    return 0


if __name__ == "__main__":
    sys.exit(main())
