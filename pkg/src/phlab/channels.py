"""Detector channels and the logical channel groups built from them."""

import enum


class Channel(enum.IntEnum):
    Ds1 = 0
    Ds2 = 1
    Dv1 = 2
    Dv2 = 3
    Dt1 = 4
    Dt2 = 5


N_CHANNELS = len(Channel)

# A group fires in a slot when at least one of its channels clicks.
GROUPS = {
    "s1": (Channel.Ds1,),
    "s2": (Channel.Ds2,),
    "v1": (Channel.Dv1,),
    "v2": (Channel.Dv2,),
    "t1": (Channel.Dt1,),
    "t2": (Channel.Dt2,),
    "s": (Channel.Ds1, Channel.Ds2),
    "v": (Channel.Dv1, Channel.Dv2),
    "t": (Channel.Dt1, Channel.Dt2),
}

S_CHANNELS = (Channel.Ds1, Channel.Ds2)
AS_CHANNELS = (Channel.Dv1, Channel.Dv2, Channel.Dt1, Channel.Dt2)


def parse_channel(value):
    """Accept a channel as an int, a name like ``"Dv1"``, or a Channel."""
    if isinstance(value, Channel):
        return value
    if isinstance(value, str):
        text = value.strip()
        if text.isdigit():
            return Channel(int(text))
        try:
            return Channel[text]
        except KeyError:
            raise ValueError(f"unknown channel {value!r}") from None
    return Channel(int(value))
