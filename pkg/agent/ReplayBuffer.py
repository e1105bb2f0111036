import json
import logging
import os

from agent.transitions import HighTransition, JointRecord, LowTransition
from utils.errors import DomainError, SchemaError

RECORD_TYPES = {cls.__name__: cls for cls in (LowTransition, HighTransition, JointRecord)}
MANIFEST_NAME = "manifest.json"
RECORDS_NAME = "transitions.jsonl"


class ReplayBuffer:
    """Bounded ring of transitions with uniform sampling from an explicit generator."""

    def __init__(self, capacity, rng):
        if capacity < 1:
            raise DomainError("buffer capacity must be >= 1, got {}".format(capacity))
        self.log = logging.getLogger(self.__class__.__name__)
        self.capacity = int(capacity)
        self.rng = rng
        self.items = []
        self.position = 0

    def __len__(self):
        return len(self.items)

    def add(self, transition):
        if len(self.items) < self.capacity:
            self.items.append(transition)
        else:
            # oldest entry sits at position once the ring is full
            self.items[self.position] = transition
        self.position = (self.position + 1) % self.capacity

    def extend(self, transitions):
        for t in transitions:
            self.add(t)

    def sample(self, batch_size):
        if not self.items:
            raise DomainError("cannot sample from an empty buffer")
        idx = self.rng.integers(len(self.items), size=batch_size)
        return [self.items[i] for i in idx]

    def ordered(self):
        """Contents from oldest to newest."""
        if len(self.items) < self.capacity:
            return list(self.items)
        return self.items[self.position:] + self.items[:self.position]

    def snapshot(self, directory):
        os.makedirs(directory, exist_ok=True)
        records = self.ordered()
        manifest = {
            "capacity": self.capacity,
            "size": len(records),
            "record_type": type(records[0]).__name__ if records else None,
        }
        with open(os.path.join(directory, MANIFEST_NAME), "w") as f:
            json.dump(manifest, f, indent=2)
        with open(os.path.join(directory, RECORDS_NAME), "w") as f:
            for record in records:
                f.write(json.dumps(record.to_dict()) + "\n")
        self.log.debug("buffer snapshot with {} records written to {}".format(len(records), directory))
        return directory

    @classmethod
    def load_snapshot(cls, directory, rng):
        with open(os.path.join(directory, MANIFEST_NAME)) as f:
            manifest = json.load(f)
        buffer = cls(manifest["capacity"], rng)
        if manifest["size"] == 0:
            return buffer
        record_type = RECORD_TYPES.get(manifest["record_type"])
        if record_type is None:
            raise SchemaError("unknown record type {!r}".format(manifest["record_type"]))
        with open(os.path.join(directory, RECORDS_NAME)) as f:
            for line in f:
                if line.strip():
                    buffer.add(record_type.from_dict(json.loads(line)))
        return buffer
