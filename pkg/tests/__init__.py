# Test package for the Multibeam Precoding Lab
