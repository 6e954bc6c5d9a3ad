import tempfile
import unittest
from fractions import Fraction
from pathlib import Path

import torch

from event_logger import clear_event_log, configure_event_log, get_event_log_path, log_event, read_events
from models.frames import ModelShape
from services.cost_model import cost_report
from tests.fixtures import reference_budget_table


class EventLogTests(unittest.TestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self._previous = get_event_log_path()
        configure_event_log(Path(self._tmp.name) / "logs" / "events.jsonl", enabled=True)

    def tearDown(self):
        configure_event_log(self._previous, enabled=False)
        self._tmp.cleanup()

    def test_payload_is_plain_json(self):
        log_event("probe", values=torch.tensor([1, 2]), share=Fraction(1, 4), where=Path("a/b"))
        record = read_events("probe")[0]
        self.assertEqual(record["values"], [1, 2])
        self.assertEqual(record["share"], 0.25)
        self.assertEqual(record["where"], str(Path("a/b")))
        self.assertIn("ts_unix_ms", record)

    def test_services_log_their_results(self):
        cost_report(reference_budget_table(), ModelShape.reference())
        self.assertEqual(read_events("cost_report")[-1]["c_pack"], 5874)

    def test_clear_reports_removed_lines(self):
        log_event("a")
        log_event("b")
        stats = clear_event_log()
        self.assertTrue(stats["ok"])
        self.assertEqual(stats["removed_lines"], 2)
        self.assertEqual(read_events(), [])

    def test_disabled_log_writes_nothing(self):
        configure_event_log(enabled=False)
        log_event("silent")
        self.assertFalse(get_event_log_path().exists())


if __name__ == "__main__":
    unittest.main()
