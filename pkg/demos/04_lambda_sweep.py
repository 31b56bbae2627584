"""Sweeping the blend coefficient: pure attributions versus historical weights.

Each lambda gets a full training run from the same pretrained checkpoint.
lambda = 1 scales the head by the attribution matrix alone; smaller values
mix in the min-max-normalized current weights, which damps how hard the
attribution matrix can suppress a feature.

Run from the repository root: python3 demos/04_lambda_sweep.py
"""

from sicdn.data import SynthConfig, synth_generate
from sicdn.model import tiny_preset
from sicdn.training import TrainConfig, lambda_sweep

dataset = synth_generate(SynthConfig(train_per_class=40, val_per_class=15, test_per_class=15, seed=3))

cfg = TrainConfig(
    epochs=5,
    pretrain_epochs=3,
    batch_size=8,
    lambdas=(0.40, 0.45, 0.50, 0.55, 0.60, 1.00),
    seed=3,
)

result = lambda_sweep(tiny_preset(seed=3), cfg, dataset)

print("lambda   top acc (avg)      top F1 (avg)       top AUC (avg)")
for row in result.rows:
    print(
        f"{row['lambda']:>6.2f}"
        f"   {row['top_acc']:.3f} ({row['avg_acc']:.3f})"
        f"    {row['top_f1']:.3f} ({row['avg_f1']:.3f})"
        f"    {row['top_auc']:.3f} ({row['avg_auc']:.3f})"
    )
print(f"\nall runs share the pretrain checkpoint from epoch {result.pretrain.best_epoch}")
