"""Utils package for Verifica: seeding, audio I/O and report export."""
