"""Replay a recorded generation run: a broken first attempt, then the repair.

    python3 demos/repair_loop.py
"""

from __future__ import annotations

from queryforge import build_project, extract_spec, load_dataset
from queryforge.generator import GenerationTask, extract_query, ProviderConfig, ScriptedProvider, generate
from queryforge.resources import DATASET_PATH, transcript
from queryforge.validator import validate


def main() -> None:
    dataset = load_dataset(DATASET_PATH)
    task = GenerationTask.from_dataset(dataset, "proto-pollution", 10, ["proto-1"])
    provider = ScriptedProvider(ProviderConfig(mode="scripted", transcript=transcript("proto_repair")))
    session = generate(task, dataset, provider, spec=extract_spec())

    print("subtasks:")
    for step in session.task.subtasks:
        print("  -", step)
    for entry in session.iterations("proto-1"):
        print(f"\nattempt {entry.attempt}: {entry.verdict}")
        print("  " + extract_query(entry.response).strip().replace("\n", "\n  "))

    # what the model saw after its first attempt
    ex = dataset.example("proto-1")
    g = build_project(dataset.project_path(ex))
    first = extract_query(session.iterations("proto-1")[0].response)
    print("\nfeedback on attempt 1:\n" + validate(first, g, ex, spec=extract_spec()).feedback(g))


if __name__ == "__main__":
    main()
