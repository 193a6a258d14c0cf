# Tests for leaptt
