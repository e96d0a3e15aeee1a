import sys, time
sys.path.insert(0, "src")
from graverec import synthkit, ingest
from graverec.engine import Engine
from graverec.store import Store

t0 = time.time()
corpus = synthkit.generate_corpus(seed=42, n_pages=3)
print(f"gen: {time.time()-t0:.2f}s")

engine = Engine(Store(":memory:"))
pages = [ingest.PageSource(image=p["png"], id=p["page_id"]) for p in corpus["pages"]]
doc = engine.import_document(pages, title="t", source_ref="s")
n = engine.ingest_detections(doc.id, corpus["detections_jsonl"])
print("detections:", n)
t0 = time.time()
created = engine.assemble_document(doc.id)
print(f"records: {created} ({time.time()-t0:.2f}s)")

t0 = time.time()
done = synthkit.validate_from_truth(engine, doc.id, corpus["truth"], north_mode="manual")
print(f"validated: {done} ({time.time()-t0:.2f}s)")

report = synthkit.score_against_truth(engine.list_records(doc.id), corpus["truth"])
for k, v in report["attributes"].items():
    print(f"{k}: n={v['n']} mean={v['mean']:.4f} max={v['max']:.4f}")

csv_text = engine.export_document(doc.id, "csv")
print(csv_text[:400])
