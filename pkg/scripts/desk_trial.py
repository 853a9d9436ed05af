#!/usr/bin/env python3
"""Trial run of the desk-scale training criterion to pin hyperparameters."""

import sys
import time

import numpy as np

sys.path.insert(0, "src")

from phototag.arch import Geometry, HeadConfig, expand_layers, parse_arch
from phototag.complexity import count_complexity
from phototag.datasets import SHAPE_CLASSES, make_shapes_corpus
from phototag.metrics import RankedPredictions, mean_ap
from phototag.multilabel import randomized_softmax_loss
from phototag.network import TrainConfig, _to_nchw, augment, build_network, train

REDUCED_D = "(7,8)/2+3/3;(1x3+3x1,16)x2+2/2;(1x3+3x1,32)x3+3/3;(1x3+3x1,64)x2+(1x3+3x1,32)"


def evaluate(net, test_set, crop):
    preds = RankedPredictions()
    scores = []
    for lo in range(0, len(test_set), 128):
        batch = np.stack([augment(img, "test", crop_h=crop, crop_w=crop)
                          for img in test_set.images[lo:lo + 128]])
        scores.append(net.predict(_to_nchw(batch)))
    scores = np.concatenate(scores)
    for i in range(len(test_set)):
        pid = f"t{i}"
        for c in range(len(SHAPE_CLASSES)):
            preds.add_score(str(c), pid, float(scores[i, c]))
        for c in test_set.labels[i]:
            preds.add_truth(str(c), pid)
    return mean_ap(preds)


def run(n_train, n_test, epochs, decay_every, lr, batch, drop_rate, seed=0):
    head = HeadConfig(spp_levels=(6, 3, 2, 1), hidden_fc_widths=(512, 512),
                      dropout_rate=0.2, num_classes=8)
    spec = parse_arch("yfnet-d-div8", REDUCED_D)
    plan = expand_layers(spec, Geometry(64, 64, 3), head)
    print("params:", count_complexity(plan).total_params)
    net = build_network(plan, head, init_seed=seed)

    train_set = make_shapes_corpus(n_train, seed=100 + seed, size=74, drop_label_rate=drop_rate)
    test_set = make_shapes_corpus(n_test, seed=999, size=74)

    cfg = TrainConfig(batch_size=batch, base_lr=lr, lr_decay_factor=10.0,
                      lr_decay_every=decay_every, total_epochs=epochs,
                      momentum=0.9, weight_decay=0.0005, seed=seed,
                      base_size=74, crop_size=64)
    t0 = time.time()
    result = train(net, train_set, randomized_softmax_loss, cfg,
                   log=lambda m: print(f"  {m} [{time.time()-t0:.0f}s]", flush=True))
    m = evaluate(net, test_set, 64)
    print(f"drop={drop_rate} epochs={epochs} lr={lr}: mAP={m:.4f} "
          f"train_time={result.seconds:.0f}s avg_tags={result.avg_tags_per_image:.3f}")
    return m, result


if __name__ == "__main__":
    n_train = int(sys.argv[1]) if len(sys.argv) > 1 else 1000
    epochs = int(sys.argv[2]) if len(sys.argv) > 2 else 6
    drop = float(sys.argv[3]) if len(sys.argv) > 3 else 0.0
    lr = float(sys.argv[4]) if len(sys.argv) > 4 else 0.01
    decay = int(sys.argv[5]) if len(sys.argv) > 5 else max(epochs // 3, 1)
    run(n_train, 400, epochs, decay, lr, 64, drop)
