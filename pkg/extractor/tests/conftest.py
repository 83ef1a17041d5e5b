import json
from pathlib import Path

import pytest

from trace_extractor.config import ExtractorConfig


def write_questions(path: Path, count: int) -> Path:
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(count):
            fh.write(json.dumps({
                "question_id": f"toy-{i:03d}",
                "prompt_text": f"Is there a thing number {i} in the image?",
                "gold_label": "yes" if i % 2 == 0 else "no",
                "dataset_tag": "toy",
            }) + "\n")
    return path


@pytest.fixture
def make_config(tmp_path):
    def _make(count=2, **overrides):
        questions = write_questions(tmp_path / "questions.jsonl", count)
        kwargs = dict(
            model="toy",
            layers=(1, 2, 3, 4),
            standard_layer=5,
            questions=questions,
            output_dir=tmp_path / "out",
            max_new_tokens=2,
            noise_channel=False,
        )
        kwargs.update(overrides)
        return ExtractorConfig(**kwargs)

    return _make
