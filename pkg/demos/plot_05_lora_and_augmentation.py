"""
Low-rank adapters and waveform augmentation
===========================================

Wrap a model with LoRA adapters, check that nothing changes at
injection, and fold the adapters back in. Then perturb a sine wave
with speed and tempo changes and compare the dominant frequency.
"""

import numpy as np

from ezpipe.finetune import LoRASpec, apply_speed, apply_tempo, count_trainable, inject_lora, merge_lora
from ezpipe.reference import ToyClassifier

rng = np.random.default_rng(0)
classes = [f"c{i}" for i in range(8)]
base = ToyClassifier(classes, params={"W": rng.normal(size=(8, 16)), "b": np.zeros(8)})
adapted = inject_lora(base, LoRASpec(target_patterns=("W",), rank=8, alpha=8.0))
# on a model this small the adapters outnumber the frozen base weights
print("adapter params:", count_trainable(adapted), "frozen base params:", sum(v.size for v in base.params.values()))

batch = [{"feats": rng.normal(size=(4, 16)), "text": c} for c in classes]
print("same loss at injection:", adapted.loss_and_grads(adapted.params, batch)[0] == base.loss_and_grads(base.params, batch)[0])

# pretend the adapter was trained, then merge
params = dict(adapted.params, **{"W.lora_B": rng.normal(0, 0.1, (8, 8))})
merged = merge_lora(adapted.with_params(params))
print("merged parameter names:", sorted(merged.params))


def peak_hz(x, rate=16000):
    spec = np.abs(np.fft.rfft(x * np.hanning(len(x)), n=1 << 18))
    return np.argmax(spec) * rate / (1 << 18)


sine = 0.5 * np.sin(2 * np.pi * 100 * np.arange(16000) / 16000)
for name, y in [("speed 0.9", apply_speed(sine, 0.9)), ("tempo 0.9", apply_tempo(sine, 0.9))]:
    print(f"{name}: {len(y)} samples, peak {peak_hz(y):.1f} Hz")
