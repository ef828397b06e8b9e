#!/usr/bin/env python3
# Copyright 2026 The ConVQG Authors. All Rights Reserved.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
# ==============================================================================
"""Writes the preference fixtures used by the metrics and CLI tests.

preferences_500.jsonl: 500 pairs, 236 A / 183 B / 81 Similar.
preferences_identical.jsonl: 40 pairs with question_a == question_b.
"""

import json
import random
import sys

NOUNS = ["cup", "ball", "book", "chair", "lamp", "knife", "bottle", "plant", "clock", "shoe", "bag", "phone"]
COLORS = ["red", "blue", "green", "yellow", "white", "black"]
FRAMES = [
    "what is the {} used for",
    "where is the {} usually located",
    "what is the {} made of",
    "what does the {} have",
    "what kind of thing is the {}",
    "what is the {} capable of",
]


def question(rng):
    return rng.choice(FRAMES).format(rng.choice(COLORS) + " " + rng.choice(NOUNS))


def main(out_dir):
    rng = random.Random(20240501)
    choices = ["A"] * 236 + ["B"] * 183 + ["Similar"] * 81
    rng.shuffle(choices)
    with open(f"{out_dir}/preferences_500.jsonl", "w") as f:
        for c in choices:
            a = question(rng)
            b = a if rng.random() < 0.15 else question(rng)
            f.write(json.dumps({"question_a": a, "question_b": b, "choice": c}) + "\n")
    with open(f"{out_dir}/preferences_identical.jsonl", "w") as f:
        for i in range(40):
            q = question(rng)
            f.write(json.dumps({"question_a": q, "question_b": q, "choice": ["A", "B", "Similar"][i % 3]}) + "\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else ".")
