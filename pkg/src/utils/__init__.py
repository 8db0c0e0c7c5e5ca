# Utility Module - Logger
