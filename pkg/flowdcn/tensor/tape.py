# flowdcn/tensor/tape.py

# Standard library imports
from logging import getLogger
from typing import Dict
from typing import Iterator
from typing import Tuple

# Third party imports
import numpy as np

# Local imports
from flowdcn.exceptions import StateException

TapeKey = Tuple[str, str]


class Tape:
    """
    Record of forward intermediates, keyed by (call-site key, op name).

    Forward functions save what their backward needs with `record`; backward
    functions read it back with `fetch`. There is no graph: callers run the
    backward functions themselves, in reverse order of the forward calls.
    """

    def __init__(self) -> None:
        self._entries: Dict[TapeKey, Dict[str, np.ndarray]] = {}
        self.logger = getLogger(f"flowdcn.{self.__class__.__name__}")

    def record(self, key: str, op: str, **saved: np.ndarray) -> None:
        """
        Save intermediates for one forward call.

        Args:
            key: Call-site name (e.g. "blocks.0.mlp.gate"); unique per forward pass
            op: Primitive name
            **saved: Arrays the backward function needs
        """
        self._entries[(key, op)] = saved

    def fetch(self, key: str, op: str) -> Dict[str, np.ndarray]:
        """
        Return the intermediates recorded for (key, op).

        Raises:
            StateException: If the forward call was not recorded
        """
        try:
            return self._entries[(key, op)]
        except KeyError:
            raise StateException(
                f"No forward intermediates recorded for {op} at '{key}'", field_name=key
            )

    def __contains__(self, item: TapeKey) -> bool:
        return item in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[TapeKey]:
        return iter(self._entries)

    def clear(self) -> None:
        """Drop every recorded entry."""
        self.logger.debug(f"Clearing {len(self._entries)} tape entries")
        self._entries.clear()
