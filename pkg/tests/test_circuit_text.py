import pytest

from circuit import CircuitError, bind_probabilities, build_surface_code_memory
from circuit_text import FORMAT_HEADER, dump_circuit_text, parse_circuit_text


class TestCircuitText:
    def test_dump_format(self, surface_d3):
        text = dump_circuit_text(surface_d3)
        lines = text.splitlines()
        assert lines[0] == FORMAT_HEADER
        assert any(line.startswith("CZ ") for line in lines)
        assert any(line.startswith("DETECTOR rec[-") for line in lines)
        assert lines[-1].startswith("OBSERVABLE rec[-")

    def test_parse_restores_circuit(self, surface_d3):
        assert parse_circuit_text(dump_circuit_text(surface_d3)) == surface_d3

    def test_bound_probabilities_survive(self, repetition_d3):
        probs = {pos: 0.001 * (k + 1) for k, (pos, _) in enumerate(repetition_d3.noise_instructions())}
        bound = bind_probabilities(repetition_d3, probs)
        parsed = parse_circuit_text(dump_circuit_text(bound))
        assert [ins.prob for ins in parsed.instructions] == [ins.prob for ins in bound.instructions]

    def test_missing_header(self):
        with pytest.raises(CircuitError, match="header"):
            parse_circuit_text("H 0\n")

    def test_unknown_instruction(self):
        text = dump_circuit_text(build_surface_code_memory(3, 1)) + "SWAP 0 1\n"
        with pytest.raises(CircuitError, match="unknown instruction"):
            parse_circuit_text(text)
