"""
Training the reference classifier
=================================

Generate a tone corpus, train the small softmax classifier with the
default recipe (AdamW, inverse square root warm-up), then resume the
same run for a few more epochs.
"""

import tempfile
from pathlib import Path

from ezpipe.dataset import from_data_directory
from ezpipe.reference import ToyClassifier, ToyCorpusSpec, generate_toy_corpus
from ezpipe.trainer import TrainConfig, evaluate, train

root = Path(tempfile.mkdtemp())
train_dd = generate_toy_corpus(ToyCorpusSpec(n_utts=80, n_classes=4, seed=0), root / "train")
valid_dd = generate_toy_corpus(ToyCorpusSpec(n_utts=20, n_classes=4, seed=1), root / "valid")
train_ds, valid_ds = from_data_directory(train_dd), from_data_directory(valid_dd)
classes = sorted(set(train_dd.text.values()))

cfg = TrainConfig(max_epoch=3, peak_lr=1e-2, warmup_steps=20, batch_bins=50000)
result = train(ToyClassifier(classes), train_ds, valid_ds, cfg, root / "exp")
for r in result.history:
    print(r["epoch"], round(r["train_loss"], 4), round(r["valid_loss"], 4), r["valid_accuracy"])

# same out_dir, larger max_epoch: training continues from checkpoints/last
cfg.max_epoch = 5
result = train(ToyClassifier(classes), train_ds, valid_ds, cfg, root / "exp")
print("epochs run:", result.epochs_run, "best epoch:", result.best_epoch)
print(evaluate(ToyClassifier(classes), valid_ds, params=result.params))
