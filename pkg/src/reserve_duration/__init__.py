"""Duration design for reserve-capacity ancillary-service products."""
