from scouttask.comms.bus import (
    BusStats,
    CommsError,
    Envelope,
    LinkModel,
    LinkOverride,
    MessageBus,
    Topic,
    broadcast,
    deliver,
)

__all__ = [
    "BusStats", "CommsError", "Envelope", "LinkModel", "LinkOverride", "MessageBus", "Topic",
    "broadcast", "deliver",
]
