"""A guided tour of the synthetic world and its background shift.

Builds the default 10-class benchmark world and walks through the task
sequence, showing how each step's training view relabels everything
outside the current classes as background, and how the disjoint protocol
additionally drops images containing future classes.

Run:  python demos/world_tour.py
"""

import numpy as np

from nestlab.synthdata import build_world, s61_sequence, s61_world_spec, step_view


def label_histogram(images):
    counts = {}
    for img in images:
        for c, n in zip(*np.unique(img.full_labels, return_counts=True)):
            counts[int(c)] = counts.get(int(c), 0) + int(n)
    return counts


def main():
    world = build_world(s61_world_spec(seed=1))
    seq = s61_sequence()

    print(f"world: {world.spec.num_classes} classes, "
          f"{len(world.train_pool)} train / {len(world.test_pool)} test images, "
          f"{world.spec.height}x{world.spec.width} px, d_in={world.spec.feature_dim}")

    # prototype geometry: the mixture classes (7-10) sit close to earlier ones
    protos = world.prototypes
    print("\nnearest earlier prototype per class (cosine):")
    for c in range(2, 11):
        sims = protos[1:c] @ protos[c]
        j = int(np.argmax(sims)) + 1
        tag = " (mixture)" if c in world.spec.mixture_classes else ""
        print(f"  class {c:2d}: closest is class {j} at {sims.max():+.3f}{tag}")

    full = label_histogram(world.train_pool)
    print(f"\nfull-label pixel histogram: { {c: full[c] for c in sorted(full)} }")

    print("\noverlapped protocol, per-step training views:")
    for t in range(seq.num_steps):
        view = step_view(seq, world, t)
        hist = label_histogram(view.train_images)
        print(f"  step {t}: classes {view.class_set}, "
              f"{len(view.train_images)} images, labels present {sorted(hist)}")

    # the same pixels of class 7 exist at step 1; before that they hide as bg
    c7_full = full.get(7, 0)
    c7_step0 = label_histogram(step_view(seq, world, 0).train_images).get(7, 0)
    c7_step1 = label_histogram(step_view(seq, world, 1).train_images).get(7, 0)
    print(f"\nbackground shift on class 7: {c7_full} px total, "
          f"{c7_step0} labeled at step 0 (hidden in bg), {c7_step1} at step 1")

    disjoint = s61_sequence(setting="disjoint")
    print("\ndisjoint protocol, retained training images per step:")
    for t in range(disjoint.num_steps):
        view = step_view(disjoint, world, t)
        print(f"  step {t}: {len(view.train_images)} of {len(world.train_pool)} images")


if __name__ == "__main__":
    main()
