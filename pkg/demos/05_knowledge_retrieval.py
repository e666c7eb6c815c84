"""
Hybrid retrieval over the operations knowledge base
====================================================

Documents are chunked at paragraph boundaries, indexed twice (a BM25
inverted index and a hashed bag-of-words dense index), recalled through
several routes at once, and fused by reciprocal rank. A sparse route
rewards exact terms; the dense route tolerates paraphrase.
"""

from cicd_triage.knowledge import ingest
from cicd_triage.solution import RetrievalQuery, multi_route_recall
from cicd_triage.synth import make_demo_kb

store = ingest(make_demo_kb())
print(f"indexed {len(store.chunks)} chunks from {len(make_demo_kb())} documents")

query_text = "build fails with missing generated file after cache change"
print(f"\nquery: {query_text!r}\n")

print("sparse (BM25) top 3:")
for hit in store.sparse_search(query_text, 3):
    print(f"  {hit.score:6.3f}  {hit.chunk_id:<24} {hit.chunk.title}")

print("dense (hashed bag of words) top 3:")
for hit in store.dense_search(query_text, 3):
    print(f"  {hit.score:6.3f}  {hit.chunk_id:<24} {hit.chunk.title}")

query = RetrievalQuery(summary=query_text, trace="", rendered=query_text)
fused = multi_route_recall(query, store)
print("fused top 5 (reciprocal rank over all routes):")
for cand in fused[:5]:
    routes = ", ".join(f"{name}#{rank}" for name, rank in cand.sources)
    print(f"  {cand.fused_score:.4f}  {cand.chunk_id:<24} via {routes}")
