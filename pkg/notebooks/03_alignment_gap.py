"""
Does the embedding space matter?
================================

The same encoder is trained against two image-embedding sets for the same
synthetic brain data. One set is a noisy copy of the latent the signals
were built from; the other is a rotated, nonlinearly warped version of it.
Retrieval accuracy and a paired t-test across seeds tell them apart.

Set ``EPOCHS`` to 100 for the full-length runs used by the acceptance suite;
the default keeps this script to a couple of minutes.
"""

# %%
import numpy as np

from naln import encoders, evalstats, retrieval, synthgen, trainer

EPOCHS = 30
SEEDS = range(3)
HYPER = dict(temporal_kernel=25, temporal_filters=16, spatial_filters=16, pool_width=2)

# %%
# The ridge decoder is a linear yardstick: how well can a closed-form read-out
# of the flattened epochs reach each embedding set?
cfg = synthgen.SynthConfig(seed=0)
data = synthgen.generate(cfg)
train, test = synthgen.holdout_split(data.epochs, cfg.n_test_reps)
for mode in ("aligned", "misaligned"):
    print(f"ridge top-1 against {mode:<10}: {synthgen.ridge_top1(train, test, data.embeddings(mode), 10.0):.3f}")

# %%
scores = {"aligned": [], "misaligned": []}
for seed in SEEDS:
    cfg = synthgen.SynthConfig(seed=seed)
    data = synthgen.generate(cfg)
    train, test = synthgen.holdout_split(data.epochs, cfg.n_test_reps)
    for mode in scores:
        images = data.embeddings(mode)
        ecfg = encoders.EncoderConfig("nice_conv", cfg.channels, cfg.samples, cfg.embed_dim, HYPER, seed)
        params, report = trainer.fit(ecfg, train, images,
                                     trainer.TrainConfig(max_epochs=EPOCHS, patience=min(25, EPOCHS), seed=seed))
        index = retrieval.build_index(synthgen.select(images, np.unique(test.labels)))
        rep = retrieval.topk_accuracy(index, encoders.embed(params, test.epochs), test.labels, (1, 5),
                                      keep_ranked=False)
        scores[mode].append(rep.accuracy[1])
        print(f"seed {seed} {mode:<10} top-1 {rep.accuracy[1]:.3f} top-5 {rep.accuracy[5]:.3f} "
              f"(best val loss {report.best_val_loss:.3f})")

# %%
res = evalstats.paired_ttest(scores["aligned"], scores["misaligned"])
row = ("top-1", *evalstats.summarize(scores["aligned"]), *evalstats.summarize(scores["misaligned"]), *res)
print(evalstats.results_table([row]))
