#
# Copyright (c) 2025 The cpbert Authors.
#
# Licensed to the Apache Software Foundation (ASF) under one
# or more contributor license agreements.  See the NOTICE file
# distributed with this work for additional information
# regarding copyright ownership.  The ASF licenses this file
# to you under the Apache License, Version 2.0 (the
# "License"); you may not use this file except in compliance
# with the License.  You may obtain a copy of the License at
#
#   http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing,
# software distributed under the License is distributed on an
# "AS IS" BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
# KIND, either express or implied.  See the License for the
# specific language governing permissions and limitations
# under the License.
#
import io
import struct
import bisect
import logging
from fractions import Fraction

import mido

from cpbert.machinery.scores import Note, Score, ScoreError, validate_score
from cpbert.utils import constants

logger = logging.getLogger(__name__)

HEADER_ID = b"MThd"
TRACK_ID = b"MTrk"


def check_chunks(data):
    """Walk the chunk layout before decoding events.

    Returns (format, n_tracks, ticks_per_quarter)."""
    if len(data) < 14 or data[:4] != HEADER_ID:
        raise ScoreError("malformed header: MThd chunk not found")
    length, fmt, ntrks, division = struct.unpack(">IHHH", data[4:14])
    if length < 6:
        raise ScoreError("malformed header: header chunk length %d" % length)
    if fmt not in (0, 1, 2):
        raise ScoreError("malformed header: unknown format %d" % fmt)
    if fmt == 2:
        raise ScoreError("unsupported SMF format 2")
    if division & 0x8000:
        raise ScoreError("malformed header: SMPTE time division is not supported")
    if division == 0:
        raise ScoreError("malformed header: zero ticks per quarter")

    offset = 8 + length
    found = 0
    while found < ntrks:
        if offset + 8 > len(data):
            raise ScoreError("truncated track chunk: %d of %d tracks present"
                % (found, ntrks))
        chunk_id = data[offset:offset + 4]
        (chunk_len,) = struct.unpack(">I", data[offset + 4:offset + 8])
        if offset + 8 + chunk_len > len(data):
            raise ScoreError("truncated track chunk %d: %d bytes declared, %d present"
                % (found, chunk_len, len(data) - offset - 8))
        # alien chunks are skipped, as the SMF format allows
        if chunk_id == TRACK_ID:
            found += 1
        offset += 8 + chunk_len

    return fmt, ntrks, division


def _decode(data):
    try:
        return mido.MidiFile(file=io.BytesIO(data))
    except (OSError, EOFError, ValueError, KeyError, IndexError, struct.error) as e:
        raise ScoreError("malformed track data: %s" % e) from e


def _collect_notes(track_idx, track, tpq):
    notes = []
    open_notes = {}
    tick = 0

    def close(key, end_tick):
        start_tick, velocity = open_notes.pop(key)
        if end_tick <= start_tick:
            logger.debug("Dropping zero-length note %s on track %d", key, track_idx)
            return
        notes.append(Note(
            onset=Fraction(start_tick, tpq),
            duration=Fraction(end_tick - start_tick, tpq),
            pitch=key[1], velocity=velocity, track=track_idx))

    for msg in track:
        tick += msg.time
        if msg.type == "note_on" and msg.velocity > 0:
            key = (msg.channel, msg.note)
            if key in open_notes:
                # overlapping same-pitch note: last-on wins
                close(key, tick)
            open_notes[key] = (tick, msg.velocity)
        elif msg.type == "note_off" or (msg.type == "note_on" and msg.velocity == 0):
            key = (msg.channel, msg.note)
            if key in open_notes:
                close(key, tick)
            else:
                logger.debug("Ignoring note-off without note-on: %s", key)

    for key in sorted(open_notes):
        logger.warning("Unmatched note-on (channel %d, pitch %d) on track %d; "
            "closing at track end tick %d" % (key[0], key[1], track_idx, tick))
        close(key, tick)

    return notes, tick


def _time_signatures(midi_file):
    events = {}
    tempos = []
    for track in midi_file.tracks:
        tick = 0
        for msg in track:
            tick += msg.time
            if msg.type == "time_signature":
                events[tick] = (msg.numerator, msg.denominator)
            elif msg.type == "set_tempo":
                tempos.append((tick, msg.tempo))
    if 0 not in events:
        events[0] = (4, 4)
    return sorted(events.items()), sorted(tempos)


def derive_downbeats(signatures, span_end):
    """Downbeats from (beat, numerator, denominator) changes, covering [0, span_end).

    A bar of n/d spans n*4/d crotchets; a signature change inside a bar
    starts a new bar at the change."""
    changes = [b for b, _, _ in signatures]
    downbeats = []
    pos = Fraction(0)
    while pos < span_end or not downbeats:
        downbeats.append(pos)
        idx = bisect.bisect_right(changes, pos) - 1
        _, num, den = signatures[idx]
        nxt = pos + Fraction(num * 4, den)
        if idx + 1 < len(changes) and changes[idx + 1] < nxt:
            nxt = changes[idx + 1]
        pos = nxt
    return tuple(downbeats)


def parse_smf(data, source=None):
    """Decode a format 0/1 Standard MIDI File into a beat-unit Score."""
    fmt, ntrks, tpq = check_chunks(data)
    midi_file = _decode(data)

    notes = []
    span_ticks = 0
    for idx, track in enumerate(midi_file.tracks):
        track_notes, end_tick = _collect_notes(idx, track, tpq)
        notes.extend(track_notes)
        span_ticks = max(span_ticks, end_tick)

    signatures, tempos = _time_signatures(midi_file)
    signatures = [(Fraction(tick, tpq), num, den) for tick, (num, den) in signatures]
    span_end = Fraction(span_ticks, tpq)
    if notes:
        span_end = max(span_end, max(n.offset for n in notes))

    meta = {
        "format": "smf",
        "smf_format": fmt,
        "ticks_per_quarter": tpq,
        "tracks": ntrks,
        "tempos": [(str(Fraction(t, tpq)), mido.tempo2bpm(us)) for t, us in tempos],
    }
    if source:
        meta["source"] = source

    logger.debug("Parsed %d notes from %s", len(notes), source or "<bytes>")
    return validate_score(Score(tuple(notes),
        derive_downbeats(signatures, span_end), constants.BEATS_UNIT, meta))
