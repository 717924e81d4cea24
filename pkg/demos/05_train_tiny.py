"""Train the full model on the bundled 32-example fixture until it overfits,
then decode and score it. Takes about half a minute on a laptop CPU.

Run from the repository root: python3 demos/05_train_tiny.py
"""

import time
from pathlib import Path

from spanqa.data import load_glove, load_squad
from spanqa.metrics import evaluate
from spanqa.model import ModelConfig
from spanqa.training import predict_answers, train

FIXTURES = Path(__file__).resolve().parents[1] / "tests" / "fixtures"

examples = load_squad(FIXTURES / "tiny_squad.json")
table = load_glove(FIXTURES / "tiny_glove.txt", dim=32)
config = ModelConfig(hidden_size=32, dropout_rate=0.0, embedding_dim=32, seed=0)

# %%
# 300 Adam steps at batch 8. The first logged loss sits near
# 2*ln(mean context length), i.e. the uniform-guess level.

started = time.time()
result = train(examples, table, config, iters=300, batch_size=8)
print(f"trained 300 iterations in {time.time() - started:.0f}s")
print(f"loss: {result.records[0].train_loss:.3f} -> "
      f"{result.records[-1].train_loss:.4f}")

# %%
# Decode every training example with the smart span and score it.

predictions = predict_answers(examples, result.params, table, config,
                              batch_size=8)
report = evaluate(predictions, examples)
print(f"train-set F1 {report.f1:.2f}  EM {report.em:.2f}")
for qid in sorted(predictions)[:5]:
    print(f"  {qid}: {predictions[qid]!r}")
